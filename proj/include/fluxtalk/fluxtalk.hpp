#pragma once

#include "fluxtalk/calibration.hpp"
#include "fluxtalk/constants.hpp"
#include "fluxtalk/cz_gate.hpp"
#include "fluxtalk/device_model.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/linalg.hpp"
#include "fluxtalk/numerics.hpp"
#include "fluxtalk/rng.hpp"
#include "fluxtalk/scan_map.hpp"
#include "fluxtalk/scenario.hpp"
#include "fluxtalk/serialization.hpp"
#include "fluxtalk/virtual_device.hpp"
