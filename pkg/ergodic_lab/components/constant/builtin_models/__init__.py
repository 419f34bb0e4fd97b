markov_models = {
    "lazy-walk": {
        "name": "lazy-walk",
        "states": ["o"],
        "kappa": 1,
        "P": [["1"]],
        "phi": [
            {"from": "o", "to": "o", "labels": [
                {"z": [-1], "weight": "1/4"},
                {"z": [0], "weight": "1/2"},
                {"z": [1], "weight": "1/4"},
            ]},
        ],
    },
    "simple-walk": {
        "name": "simple-walk",
        "states": ["o"],
        "kappa": 1,
        "P": [["1"]],
        "phi": [
            {"from": "o", "to": "o", "labels": [
                {"z": [-1], "weight": "1/2"},
                {"z": [1], "weight": "1/2"},
            ]},
        ],
    },
    # the lazy walk with its steps written as states; phi is the step of the target state
    "lazy-walk-split": {
        "name": "lazy-walk-split",
        "states": ["L", "Z", "R"],
        "kappa": 1,
        "P": [
            ["1/4", "1/2", "1/4"],
            ["1/4", "1/2", "1/4"],
            ["1/4", "1/2", "1/4"],
        ],
        "phi": [
            {"from": a, "to": b, "labels": [{"z": [step], "weight": "1"}]}
            for a in ("L", "Z", "R")
            for b, step in (("L", -1), ("Z", 0), ("R", 1))
        ],
    },
    "lazy-walk-z2": {
        "name": "lazy-walk-z2",
        "states": ["o"],
        "kappa": 2,
        "P": [["1"]],
        "phi": [
            {"from": "o", "to": "o", "labels": [
                {"z": [0, 0], "weight": "1/2"},
                {"z": [1, 0], "weight": "1/8"},
                {"z": [-1, 0], "weight": "1/8"},
                {"z": [0, 1], "weight": "1/8"},
                {"z": [0, -1], "weight": "1/8"},
            ]},
        ],
    },
    "lazy-walk-z3": {
        "name": "lazy-walk-z3",
        "states": ["o"],
        "kappa": 3,
        "P": [["1"]],
        "phi": [
            {"from": "o", "to": "o", "labels": [
                {"z": [0, 0, 0], "weight": "1/2"},
                {"z": [1, 0, 0], "weight": "1/12"},
                {"z": [-1, 0, 0], "weight": "1/12"},
                {"z": [0, 1, 0], "weight": "1/12"},
                {"z": [0, -1, 0], "weight": "1/12"},
                {"z": [0, 0, 1], "weight": "1/12"},
                {"z": [0, 0, -1], "weight": "1/12"},
            ]},
        ],
    },
    "biased-chain": {
        "name": "biased-chain",
        "states": ["a", "b"],
        "kappa": 0,
        "P": [
            ["9/10", "1/10"],
            ["1/5", "4/5"],
        ],
    },
    "uniform-chain": {
        "name": "uniform-chain",
        "states": ["a", "b"],
        "kappa": 0,
        "P": [
            ["1/2", "1/2"],
            ["1/2", "1/2"],
        ],
    },
    "two-state-pm": {
        "name": "two-state-pm",
        "states": ["p", "m"],
        "kappa": 1,
        "P": [
            ["1/2", "1/2"],
            ["1/2", "1/2"],
        ],
        "phi": [
            {"from": a, "to": b, "labels": [{"z": [step], "weight": "1"}]}
            for a in ("p", "m")
            for b, step in (("p", 1), ("m", -1))
        ],
    },
}


semiflow_models = {
    "two-valued-roof": {
        "name": "two-valued-roof",
        "base": "lazy-walk-split",
        "roof": {"L": "1", "Z": "1", "R": "3/2"},
    },
    "unit-roof-lazy-walk": {
        "name": "unit-roof-lazy-walk",
        "base": "lazy-walk",
        "roof": {"o": "1"},
    },
    "unit-roof-split": {
        "name": "unit-roof-split",
        "base": "lazy-walk-split",
        "roof": {"L": "1", "Z": "1", "R": "1"},
    },
    # arithmetic: 4 h_n + phi_n = 5n along every closed walk
    "pm-roof": {
        "name": "pm-roof",
        "base": "two-state-pm",
        "roof": {"p": "1", "m": "3/2"},
    },
}


# groups are built from closed-form generators in components.hyperbolic
group_models = ("schottky", "octagon")
