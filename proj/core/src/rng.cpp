#include "carl/rng.hpp"

#include <sstream>

namespace carl {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw IntegrityError("bad rng state string");
}

}  // namespace carl
