from mmmqa.training import TrainPlan

ENCODER = {"hidden": 16, "layers": 1, "heads": 2, "max_len": 32, "dropout": 0.1}


def small_plan(**over):
    d = {
        "seed": 3,
        "encoder": ENCODER,
        "classifier": {"kind": "man", "steps": 2},
        "roles": {"aux": "nli", "source": "src", "target": "tgt", "target_dev": "dev"},
        "datasets": {
            "nli": {"kind": "pair", "synthetic": {"seed": 1, "count": 48}},
            "src": {"kind": "mcqa", "synthetic": {"seed": 2, "count": 64}},
            "tgt": {"kind": "mcqa", "synthetic": {"seed": 3, "count": 24, "style": "dialogue"},
                    "speaker_normalization": True},
            "dev": {"kind": "mcqa", "synthetic": {"seed": 4, "count": 20, "style": "dialogue"},
                    "speaker_normalization": True},
        },
        "stages": [
            {"kind": "coarse_tune", "datasets": ["nli"], "lr_max": 0.002, "batch_size": 8, "max_steps": 6,
             "clip": 5.0},
            {"kind": "multi_task", "datasets": ["src", "tgt"], "lr_max": 0.002, "batch_size": 8, "max_steps": 12,
             "eval_every": 5, "dev": "dev", "clip": 5.0},
        ],
    }
    d.update(over)
    return TrainPlan.from_dict(d)
