defaults = {
    "distances": [1.0, 1.4, 1.8, 2.2, 2.6, 3.0, 3.4, 3.8],
    "lambda_b": [0.0, 7.7e6, 1.2e8],
    "trials": 250,
    "windows": 15000,
    "t_w": 4e-9,
    "t_acq": 100e-9,
    # 回波光子数随距离平方衰减，以参考距离处的光子数为基准
    "reference_distance": 3.8,
    "reference_photons": 0.2,
    "scheme": "acquire_or_discard",
    "t_ts": 100e-12,
    "tdc_bits": 10,
    "apply_quantization": True,
    "counter_bits": 32,
    "calibration_timestamps": 100000,
    # 回放标定记录的 acquire-or-discard 丢弃上限
    "max_discards": 10000,
}
