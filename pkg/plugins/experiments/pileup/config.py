defaults = {
    "lambda_b": 5e6,
    # 每个窗口至少探测到一个信号光子的概率
    "detection_rate": 0.9,
    "tof": 25e-9,
    "t_w": 4e-9,
    "shape": "truncated-gaussian",
    "t_acq": 100e-9,
    "bin_width": 100e-12,
    "acquisitions": 200000,
    "max_discards": 10000,
    # 激光峰前后由线性化直方图估计的背景光通量相对拟合值的偏差上限
    "tolerance": 0.04,
    "low_rate": {"lambda_b": 1e5, "detection_rate": 0.05},
    "full_scale": {"acquisitions": 1000000},
}
