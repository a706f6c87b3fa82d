"""Write the comparative suite to YAML and benchmark projected vs raw sampling via the CLI.

Run: python3 demos/02_closed_loop.py [output_dir]
A full run (10 scenarios x 2 arms, one seed) takes under two minutes on one core.
"""
import sys
from pathlib import Path

from trackproj import formats
from trackproj.cli import main
from trackproj.suites import comparative_suite

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/closed_loop")
suite_dir = out / "suite"
for sc in comparative_suite():
    formats.save_scenario(sc, suite_dir / f"{sc.name}.yaml")
print(f"wrote {len(comparative_suite())} scenarios to {suite_dir}")

code = main(["benchmark", str(suite_dir), str(out / "bench"), "--arms", "base,raw-unprojected"])
if code:
    sys.exit(code)

rows = formats.parse_table((out / "bench" / "table.csv").read_text())
totals = {}
print(f"{'scenario':<22}{'arm':<18}{'occlusion s':>12}{'collisions':>12}")
for r in rows:
    print(f"{r['scenario']:<22}{r['arm']:<18}{float(r['occlusion_time']):>12.2f}{int(r['collision_count']):>12d}")
    totals[r["arm"]] = totals.get(r["arm"], 0.0) + float(r["occlusion_time"])
for arm, t in totals.items():
    print(f"total occlusion {arm}: {t:.2f} s")
