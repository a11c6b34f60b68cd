"""A reduced property battery, printed as a table and saved as CSV.

Run: python demos/property_battery.py [out_dir]
The full default battery is what `symphom check` runs; this one trims the
class lists so it finishes in a few minutes.
"""
import sys
from pathlib import Path

from symphom.quasimorphism import Battery, check_axioms

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

battery = Battery(pendulum_classes=(0.0, 1.0), kinetic_classes=(0.0,), covering_degrees=(2,),
                  covering_classes=(0.0,), include_cross_route=False)
report = check_axioms(battery)
print(report.summary())
(out / "properties.csv").write_text(report.to_csv())
