# EventAttn Source Package
