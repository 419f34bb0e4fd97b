# One case per claim tag. The quick profile shrinks windows and grids so the
# whole table runs in a few minutes; the full profile uses every default.
quick_profile = [
    {"experiment": "renewal", "tag": "renewal-sequence", "params": {"n_max": 80}},
    {"experiment": "correlation", "tag": "multiple-correlation", "params": {"n": 30}},
    {"experiment": "recurrence", "tag": "multiple-recurrence", "params": {"n_max": 2000}},
    {"experiment": "farey", "tag": "ordering-domains", "params": {"d": 3, "bound": 60}},
    {"experiment": "psi-moments", "tag": "psi-moments",
     "params": {"nus": [0, 1], "n_grid": [40, 80], "drift_bound": 0.5}},
    {"experiment": "semiflow-llt", "tag": "local-limit",
     "params": {"n_grid": [100, 200, 400], "n_fit": 400, "bound": 0.05}},
    {"experiment": "lll", "tag": "lower-local-limit", "params": {"M_grid": [2, 5]}},
    {"experiment": "bell", "tag": "tail-sum", "params": {"t_grid": [50, 100]}},
    {"experiment": "hyp-geometry", "tag": "disk-geometry",
     "params": {"samples": 200, "grid": [20, 20, 5], "lambda_samples": 200000,
                "domain_max_len": 2, "domain_samples": 300}},
    {"experiment": "group-enum", "tag": "word-growth", "params": {"max_len": 5}},
    {"experiment": "orbital", "tag": "correlation-sandwich", "params": {"t_grid": [4.0, 5.0], "s_grid": [3.0]}},
    {"experiment": "cover-count", "tag": "cover-counting", "params": {"t_grid": [6.0, 7.0, 8.0]}},
    {"experiment": "admissibility", "tag": "admissibility", "params": {"window": [10, 30]}},
    {"experiment": "rwm", "tag": "rational-weak-mixing",
     "params": {"d_list": [1], "n_grid": [200, 400], "bound": 0.3}},
    {"experiment": "transfer", "tag": "transfer-duality", "params": {"n_grid": [1, 2]}},
    {"experiment": "induced-return", "tag": "induced-return", "params": {"n_max": 200}},
    {"experiment": "stable-density", "tag": "stable-density", "params": {}},
    {"experiment": "aperiodicity", "tag": "aperiodicity", "params": {}},
    {"experiment": "flow-return", "tag": "flow-return", "params": {"n_grid": [50, 100]}},
    {"experiment": "geodesic-multi", "tag": "geodesic-multi-correlation", "params": {"gap_sets": [[2.6, 2.6]]}},
    {"experiment": "nice", "tag": "nice-set", "params": {"window": [10, 30]}},
]

full_profile = [{**case, "params": {}} for case in quick_profile]

profiles = {"quick": quick_profile, "full": full_profile}
