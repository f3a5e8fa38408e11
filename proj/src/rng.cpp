#include "reladiff/rng.hpp"

#include <sstream>

#include "reladiff/errors.hpp"

namespace reladiff {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng.engine_ >> rng.normal_;
  if (!is) throw LoadError("corrupt generator state");
  return rng;
}

}  // namespace reladiff
