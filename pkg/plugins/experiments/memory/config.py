defaults = {
    "tdc_bits": [9, 10, 11, 12, 13, 14, 15, 16],
    "histogram_depth_bits": 8,
    "counter_bits": 16,
    # 已发表的 d-ToF 传感器的 TDC 位宽，直方图深度取 histogram_depth_bits
    "standard": [9, 12, 14, 14, 16],
    # 片上直方图传感器：{"name": ..., "tdc_bits": ..., "histogram_depth_bits": ...}
    "on_chip": [],
    # 整个像素阵列的直方图存储
    "array": {
        "pixels": 16384,
        "range_m": 10.0,
        "bin_width": 100e-12,
        "depth_bits": 8,
    },
}
