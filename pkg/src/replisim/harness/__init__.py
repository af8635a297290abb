"""Scenario configuration, runtime, incident library, enrollment flows and CLI."""
from .config import ChannelPopulation, ConfigInvalid, FaultInjection, ScenarioConfig, Toggles
from .incidents import INCIDENTS, UnknownScenario, anti_detection_pair, incident_pair, incident_scenario
from .runtime import POLLUTION_MIX, RunResult, Simulation, run_scenario, sweep_crash_points
from .signup import SignupContext, SignupError, signup_channel

__all__ = [
    "ChannelPopulation", "ConfigInvalid", "FaultInjection", "INCIDENTS", "POLLUTION_MIX",
    "RunResult", "ScenarioConfig", "SignupContext", "SignupError", "Simulation", "Toggles",
    "UnknownScenario", "anti_detection_pair", "incident_pair", "incident_scenario",
    "run_scenario", "signup_channel", "sweep_crash_points",
]
