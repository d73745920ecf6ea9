"""Regenerate src/skillplan/data/{eval_suite,seed_tasks}.json.

Scenes are laid out one row per label; same-label instances get distinct
sizes and x positions so every qualifier has a unique answer.

    python scripts/make_bundled_data.py
"""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "skillplan" / "data"
W, H = 640, 480

# side lengths per instance index: largest in the middle, smallest on the right
SIZES = {
    "small": [38, 62, 30, 50],
    "large": [80, 96, 70, 88],
}
LARGE = {"box", "bowl", "tray", "{b}", "{d}"}


def layout(rows: list[tuple[str, int]]) -> dict:
    """rows: (label, count) top to bottom."""
    objects = []
    for r, (label, count) in enumerate(rows):
        sizes = SIZES["large" if label in LARGE else "small"]
        y0 = 20 + r * 112
        for i in range(count):
            side = sizes[i % len(sizes)]
            x0 = 40 + i * 150 + (r * 17) % 40
            objects.append(
                {
                    "id": f"o{len(objects) + 1}",
                    "label": label,
                    "bbox": [x0, y0, x0 + side, y0 + side],
                    "depth_mm": 250 + 15 * len(objects),
                }
            )
    return {"image_width": W, "image_height": H, "objects": objects}


def T(label, q=None):
    return {"label": label, "qualifier": q or "none"}


def pick(obj, q=None, dest=None, dq=None):
    step = {"verb": "pick", "object": T(obj, q)}
    if dest:
        step["destination"] = T(dest, dq)
    return step


def place(dest, q=None):
    return {"verb": "place", "object": T(dest, q)}


def push(obj, q=None):
    return {"verb": "push", "object": T(obj, q)}


HOME = {"verb": "home"}


def phrase(t):
    q = t["qualifier"]
    return f"the {q} {t['label']}" if q != "none" else f"the {t['label']}"


def instruction(goal):
    clauses = []
    for s in goal:
        if s["verb"] == "home":
            clauses.append("move the arm home")
        elif s["verb"] == "pick":
            c = f"pick up {phrase(s['object'])}"
            if "destination" in s:
                c += f" and place it onto {phrase(s['destination'])}"
            clauses.append(c)
        elif s["verb"] == "place":
            clauses.append(f"place it onto {phrase(s['object'])}")
        else:
            clauses.append(f"push {phrase(s['object'])}")
    text = ", then ".join(clauses)
    return text[0].upper() + text[1:] + "."


def chain_len(goal):
    n = 0
    for s in goal:
        n += 1 if s["verb"] == "home" else 2
        if "destination" in s:
            n += 2
    return n


def scene_for(goal, multi, distractor):
    labels = []
    for s in goal:
        for key in ("object", "destination"):
            if key in s and s[key]["label"] not in labels:
                labels.append(s[key]["label"])
    rows = [(lbl, 3 if lbl in multi else 1) for lbl in labels]
    if distractor and len(rows) < 4:
        rows.append((distractor, 2))
    return layout(rows)


SIMPLE = [
    [pick("block")],
    [pick("cube"), HOME],
    [pick("block", dest="box")],
    [push("ball")],
    [push("ball"), HOME],
    [pick("block", dest="box"), HOME],
    [push("ball"), pick("cube"), HOME],
    [push("ball"), pick("block", dest="box")],
    [HOME, pick("cube"), place("tray")],
    [pick("block", dest="bowl"), push("ball")],
    [pick("block", dest="box"), pick("cube", dest="bowl")],
    [pick("block", dest="box"), push("ball"), HOME],
    [push("ball"), push("cup"), pick("block", dest="box")],
    [HOME, pick("cube", dest="tray"), push("ball")],
    [pick("block", dest="box"), pick("cube"), place("bowl")],
]

DYNAMIC = [
    [pick("block", "largest")],
    [pick("block", "leftmost"), HOME],
    [pick("block", "rightmost", "block", "largest")],
    [push("ball", "smallest")],
    [pick("cube", "smallest", "box")],
    [pick("block", "largest", "box"), HOME],
    [push("ball", "leftmost"), pick("cube", "largest"), HOME],
    [push("ball", "rightmost"), pick("block", "smallest", "box", "largest")],
    [HOME, pick("cube", "leftmost"), place("tray", "rightmost")],
    [pick("block", "largest", "bowl", "leftmost"), push("ball", "smallest")],
    [pick("block", "largest", "box"), pick("block", "smallest", "box")],
    [pick("block", "rightmost", "block", "largest"), push("ball", "leftmost"), HOME],
    [push("ball", "smallest"), push("ball", "largest"), pick("cube", "leftmost", "bowl", "rightmost")],
    [HOME, pick("block", "leftmost", "box", "smallest"), push("ball", "rightmost")],
    [pick("cube", "largest", "tray", "leftmost"), pick("block", "rightmost"), place("bowl", "largest")],
]


def qualified_labels(goal):
    out = set()
    for s in goal:
        for key in ("object", "destination"):
            if key in s and s[key]["qualifier"] != "none":
                out.add(s[key]["label"])
    return out


def eval_suite():
    tasks = []
    for cat, goals, prefix in (("simple_mapping", SIMPLE, "sm"), ("dynamic_reasoning", DYNAMIC, "dr")):
        for i, goal in enumerate(goals, 1):
            multi = qualified_labels(goal)
            tasks.append(
                {
                    "id": f"{prefix}{i:02d}",
                    "category": cat,
                    "instruction": instruction(goal),
                    "goal_program": goal,
                    "scene": scene_for(goal, multi, "plate"),
                }
            )
    return {"tasks": tasks}


# Seed tasks use label slots {a}..{d}; augmentation fills them from a lexicon.
SEED_SIMPLE = [
    [pick("{a}")],
    [pick("{a}"), HOME],
    [pick("{a}", dest="{b}")],
    [pick("{a}", dest="{b}"), HOME],
    [push("{c}"), pick("{a}", dest="{b}")],
    [pick("{a}", dest="{b}"), push("{c}"), HOME],
    [pick("{a}", dest="{b}"), pick("{c}", dest="{d}")],
    [pick("{a}", dest="{b}"), pick("{c}", dest="{d}"), HOME],
    [pick("{a}", dest="{b}"), pick("{c}", dest="{d}"), push("{a}"), HOME],
    [HOME, pick("{a}", dest="{b}"), pick("{c}", dest="{d}"), pick("{a}", dest="{d}")],
]

SEED_DYNAMIC = [
    [pick("{a}", "largest")],
    [pick("{a}", "rightmost", "{a}", "largest")],
    [pick("{a}", "smallest", "{b}"), HOME],
    [push("{c}", "leftmost"), pick("{a}", "largest", "{b}")],
    [pick("{a}", "leftmost", "{b}", "largest"), push("{c}", "rightmost"), HOME],
    [pick("{a}", "largest", "{b}"), pick("{a}", "smallest", "{b}")],
    [pick("{a}", "rightmost", "{b}", "smallest"), push("{c}", "largest"), pick("{c}", "leftmost")],
    [pick("{a}", "largest", "{b}"), pick("{a}", "leftmost", "{b}"), push("{c}", "smallest"), HOME],
    [pick("{a}", "smallest", "{b}"), pick("{a}", "largest", "{d}"), pick("{c}", "rightmost", "{b}")],
    [pick("{a}", "largest", "{b}", "leftmost"), pick("{c}", "smallest", "{d}"), pick("{a}", "rightmost", "{b}", "largest"), HOME],
]


def seed_tasks():
    seeds = []
    for cat, goals, prefix in (("simple_mapping", SEED_SIMPLE, "seed-s"), ("dynamic_reasoning", SEED_DYNAMIC, "seed-d")):
        for i, goal in enumerate(goals, 1):
            multi = qualified_labels(goal)
            scene = scene_for(goal, multi, "{e}")
            slots = sorted({o["label"][1] for o in scene["objects"]})
            seeds.append(
                {
                    "id": f"{prefix}{i:02d}",
                    "category": cat,
                    "slots": slots,
                    "instruction_template": instruction(goal),
                    "goal_program": goal,
                    "scene": scene,
                    "chain_length": chain_len(goal),
                }
            )
    return {"seeds": seeds}


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    for name, payload in (("eval_suite.json", eval_suite()), ("seed_tasks.json", seed_tasks())):
        (DATA / name).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        print("wrote", DATA / name)
