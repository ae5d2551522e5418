"""
A small market with and without storage
=======================================

Three buses, a handful of thermal and renewable units and a few hundred
households. Each day the aggregators retrain their storage policies against
their price beliefs, play them, and watch the market clear. The baseline
runs the same days with every battery idle.
"""

# %%
from pathlib import Path

from gridmfg.case import generate_case
from gridmfg.market import ScenarioConfig, check_mfe, simulate
from gridmfg.metrics import log_metrics
from gridmfg.plotting import plot_bars, plot_hub, plot_storage
from gridmfg.market import read_runlog

out = Path(__file__).parent / "_output"
case = generate_case(3, seed=0)
print("generators:", [g.id for g in case.network.generators])
print("prosumers per bus:", case.prosumers, "consumers per bus:", case.consumers)

# %%
# Twenty days for two seeds keeps this quick. The acceptance suite uses
# thirty days and three seeds.
learn_logs, learn = simulate(ScenarioConfig(case, days=20, seeds=(0, 1)), out / "learn")
base_logs, base = simulate(ScenarioConfig(case, days=20, seeds=(0, 1), storage=False), out / "base")

for s, log in enumerate(learn_logs):
    rep = check_mfe(log)
    print(f"seed {s}: converged={rep['converged']}, price change {rep['price_change_rel']:.2%}, "
          f"policy change {rep['policy_change']:.3f}")

# %%
# Storage smooths the hub price and trims what households pay.
print(f"IMV   learn {learn['imv']['mean']:.3f}  baseline {base['imv']['mean']:.3f}")
print(f"cost  learn {learn['ex_post_cost']['mean']:.1f}  baseline {base['ex_post_cost']['mean']:.1f}")

# %%
# Figures go next to this script.
runs = {(lab, s): read_runlog(out / lab / f"seed{s}" / "runlog.csv") for lab in ("learn", "base") for s in (0, 1)}
plot_hub([(lab, runs[(lab, 0)]) for lab in ("learn", "base")], out / "hub.svg")
plot_storage([("learn", runs[("learn", 0)])], out / "storage.svg")
plot_bars([(lab, s, c) for (lab, s), c in runs.items()], "imv", out / "imv.svg")
plot_bars([(lab, s, c) for (lab, s), c in runs.items()], "cost", out / "cost.svg")
print("figures in", out)
