#pragma once

namespace reladiff {

/// In-memory element type. Persisted data (volumes, checkpoints) is float32;
/// see reladiff/checkpoint.hpp and reladiff/volume.hpp for the conversions.
using Real = double;

}  // namespace reladiff
