defaults = {
    "lambda_b": [6.5e6, 2.4e7, 6.7e7, 1.33e8],
    "t_acq": 100e-9,
    "bin_width": 100e-12,
    # 非空首光子时间戳数量
    "timestamps": 1000000,
    "subsets": 200,
    "tolerance": 0.01,
    # 背景加激光回波：激光峰前后分别用 acquire-or-discard 恢复背景光通量
    "laser": {
        "lambda_b": [2.76e7, 4.66e7, 7.88e7, 1.33e8],
        "distance": 2.5,
        "t_w": 4e-9,
        "mean_photons": 2.0,
        "horizon": 37e-9,
        "timestamps": 500000,
        "max_discards": 10000,
        "tolerance": 0.04,
    },
    "full_scale": {
        "timestamps": 8000000,
        "tolerance": 0.005,
        "laser": {"timestamps": 2500000},
    },
}
