defaults = {
    "t_ts": 100e-12,
    "threshold": 0.01,
    "thresholds": [0.001, 0.01, 0.05, 0.1, 0.5],
    # 传统 5% 规则对应的采集窗口
    "t_acq": 100e-9,
}
