#include "avc/core.hpp"

namespace avc {

std::string_view to_string(VehicleClass cls) {
  return cls == VehicleClass::Car ? "car" : "cv";
}

std::string_view to_string(Direction dir) {
  return dir == Direction::LeftToRight ? "l2r" : "r2l";
}

VehicleClass parse_vehicle_class(std::string_view text) {
  if (text == "car") return VehicleClass::Car;
  if (text == "cv") return VehicleClass::CommercialVehicle;
  throw ConfigError("unknown vehicle class '" + std::string(text) + "' (expected car|cv)");
}

Direction parse_direction(std::string_view text) {
  if (text == "l2r") return Direction::LeftToRight;
  if (text == "r2l") return Direction::RightToLeft;
  throw ConfigError("unknown direction '" + std::string(text) + "' (expected l2r|r2l)");
}

}  // namespace avc
