defaults = {
    "lambda_b": [
        1e6,
        1.7782794100389228e6,
        3.1622776601683795e6,
        5.623413251903491e6,
        1e7,
        1.7782794100389228e7,
        3.1622776601683795e7,
        5.623413251903491e7,
        1e8,
    ],
    "t_acq": 100e-9,
    "t_w": 4e-9,
    "runs": 2000,
    # 每帧需要的线性化 run 数与目标帧率
    "target_runs": 30000,
    "fps": 30,
    "full_scale": {"runs": 20000},
}
