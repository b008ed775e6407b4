#include "dmf/numerics/random.hpp"

#include <sstream>

namespace dmf {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw std::invalid_argument("Rng: malformed generator state");
}

}  // namespace dmf
