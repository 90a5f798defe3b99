"""Run the 60 s full-physics scenario and compare the filter with pure integration."""
from pathlib import Path

from swarmsync.config import load_config
from swarmsync.runner import run_scenario

cfg = load_config(Path(__file__).parent / "scenarios" / "filter_60s.yaml")
sm = run_scenario(cfg).summary
print(f"rounds {sm.rounds}, robots {cfg.n}")
print(f"filter RMSE          {sm.rmse:.4f} m")
print(f"dead reckoning RMSE  {sm.rmse_dead_reckoning:.4f} m")
print(f"ratio                {sm.rmse / sm.rmse_dead_reckoning:.4f}")
