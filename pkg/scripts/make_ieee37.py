"""Regenerate src/gridpart/data/ieee37.json.

Single-phase equivalent of the IEEE 37-node test feeder: spot loads are the
average of the three phase loads, line impedances use the self impedance of
the line configuration, everything on a 1 MVA / 4.8 kV base.

Fixture assumptions (not recoverable from the published feeder data):
* 22 loaded buses: the three smallest averaged loads (714, 724, 725) are
  zeroed.
* Tie lines 712-727, 722-731, 736-741, 718-725 are normally open.
* Grid-forming units at 742, 718, 710 share 13% of total rated load; PV at
  702, 705, 707, 709, 737 shares 29%.
"""

import json
from pathlib import Path

Z_BASE = 4.8 ** 2 / 1.0  # ohm
# ohm/mile self impedance and per-phase rating (MVA) of each configuration
CONFIG = {
    721: (0.2926, 0.1973, 1.93),
    722: (0.4751, 0.2973, 1.34),
    723: (1.2936, 0.6713, 0.637),
    724: (2.0952, 0.7758, 0.432),
}
SEGMENTS = [  # from, to, length ft, config
    ("701", "702", 960, 722), ("702", "705", 400, 724), ("702", "713", 360, 723),
    ("702", "703", 1320, 722), ("703", "727", 240, 724), ("703", "730", 600, 723),
    ("704", "714", 80, 724), ("704", "720", 800, 723), ("705", "742", 320, 724),
    ("705", "712", 240, 724), ("706", "725", 280, 724), ("707", "724", 760, 724),
    ("707", "722", 120, 724), ("708", "733", 320, 723), ("708", "732", 320, 724),
    ("709", "731", 600, 723), ("709", "708", 320, 723), ("710", "735", 200, 724),
    ("710", "736", 1280, 724), ("711", "741", 400, 723), ("711", "740", 200, 724),
    ("713", "704", 520, 723), ("714", "718", 520, 724), ("720", "707", 920, 724),
    ("720", "706", 600, 723), ("727", "744", 280, 723), ("730", "709", 200, 723),
    ("733", "734", 560, 723), ("734", "737", 640, 723), ("734", "710", 520, 724),
    ("737", "738", 400, 723), ("738", "711", 400, 723), ("744", "728", 200, 724),
    ("744", "729", 280, 724), ("799", "701", 1850, 721),
]
TIES = [("712", "727", 600, 724), ("722", "731", 800, 724),
        ("736", "741", 700, 724), ("718", "725", 900, 724)]
# kW / kvar per phase a, b, c
LOADS = {
    "701": [(140, 70), (140, 70), (350, 175)], "712": [(0, 0), (0, 0), (85, 40)],
    "713": [(0, 0), (0, 0), (85, 40)], "714": [(17, 8), (21, 10), (0, 0)],
    "718": [(85, 40), (0, 0), (0, 0)], "720": [(0, 0), (0, 0), (85, 40)],
    "722": [(0, 0), (140, 70), (21, 10)], "724": [(0, 0), (42, 21), (0, 0)],
    "725": [(0, 0), (42, 21), (0, 0)], "727": [(0, 0), (0, 0), (42, 21)],
    "728": [(42, 21), (42, 21), (42, 21)], "729": [(42, 21), (0, 0), (0, 0)],
    "730": [(0, 0), (0, 0), (85, 40)], "731": [(0, 0), (85, 40), (0, 0)],
    "732": [(0, 0), (0, 0), (42, 21)], "733": [(85, 40), (0, 0), (0, 0)],
    "734": [(0, 0), (0, 0), (42, 21)], "735": [(0, 0), (0, 0), (85, 40)],
    "736": [(0, 0), (42, 21), (0, 0)], "737": [(140, 70), (0, 0), (0, 0)],
    "738": [(126, 62), (0, 0), (0, 0)], "740": [(0, 0), (0, 0), (85, 40)],
    "741": [(0, 0), (0, 0), (42, 21)], "742": [(8, 4), (85, 40), (0, 0)],
    "744": [(42, 21), (0, 0), (0, 0)],
}
ZEROED = {"714", "724", "725"}
COMMERCIAL = {"701", "722", "728", "737", "738", "740"}
GRID_FORMING = ["742", "718", "710"]
PV = ["702", "705", "707", "709", "737"]
ORDER = ["799", "701", "702", "703", "704", "705", "706", "707", "708", "709", "710",
         "711", "712", "713", "714", "718", "720", "722", "724", "725", "727", "728",
         "729", "730", "731", "732", "733", "734", "735", "736", "737", "738", "740",
         "741", "742", "744", "775"]


def main() -> None:
    dp, dq = {}, {}
    for bus in ORDER:
        phases = LOADS.get(bus, [(0, 0)] * 3)
        p = sum(ph[0] for ph in phases) / 3 / 1000.0
        q = sum(ph[1] for ph in phases) / 3 / 1000.0
        dp[bus], dq[bus] = (0.0, 0.0) if bus in ZEROED else (round(p, 6), round(q, 6))
    total = sum(dp.values())
    gf_cap = round(0.13 * total / len(GRID_FORMING), 6)
    pv_cap = round(0.29 * total / len(PV), 6)
    buses = []
    for bus in ORDER:
        entry = {"id": bus, "dp": dp[bus], "dq": dq[bus], "gp": 0.0, "gq": 0.0, "qmin": 0.0,
                 "grid_forming": False,
                 "load_profile": "commercial" if bus in COMMERCIAL else "residential"}
        if bus in GRID_FORMING:
            entry.update(gp=gf_cap, gq=gf_cap, qmin=round(gf_cap / 2, 6), grid_forming=True,
                         gen_profile="constant")
        if bus in PV:
            entry.update(gp=pv_cap, gen_profile="solar")
        buses.append(entry)
    lines = []
    for a, b, ft, cfg in SEGMENTS + TIES:
        r, x, rating = CONFIG[cfg]
        miles = ft / 5280.0
        lines.append({"from": a, "to": b, "r": round(r * miles / Z_BASE, 8),
                      "x": round(x * miles / Z_BASE, 8), "pmax": rating, "qmax": rating,
                      "normally_open": (a, b, ft, cfg) in TIES})
    # 775 hangs off 709 through the substation transformer XFM-1
    lines.append({"from": "709", "to": "775", "r": 0.0018, "x": 0.0362, "pmax": 0.5,
                  "qmax": 0.5, "normally_open": False})
    doc = {"name": "ieee37-single-phase", "base_mva": 1.0, "substation": "799",
           "buses": buses, "lines": lines}
    out = Path(__file__).resolve().parents[1] / "src" / "gridpart" / "data" / "ieee37.json"
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {out}: total load {total:.4f} pu, GF {gf_cap} x3, PV {pv_cap} x5")


if __name__ == "__main__":
    main()
