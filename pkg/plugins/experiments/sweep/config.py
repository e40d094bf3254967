defaults = {
    "lambda_b": [1e5, 1e6, 1e7, 1e8, 1e9],
    "lambda_s": [1e6, 3.1622776601683795e6, 1e7, 3.1622776601683795e7, 1e8],
    "tof": 25e-9,
    "t_w": 4e-9,
    "t_acq": 100e-9,
    "windows": 1000,
    "scheme": "ideal",
    # λ_B = 1e9 时 16 位计数器在一千个窗口内就会饱和
    "counter_bits": 32,
    "tolerance": 0.05,
    # 偏离真值超过 z_limit 个预测标准差视为失败
    "z_limit": 5.0,
    "full_scale": {"windows": 10000},
}
