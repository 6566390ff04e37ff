#pragma once

#include "hypctrl/error.hpp"
#include "hypctrl/expression.hpp"
#include "hypctrl/core.hpp"
#include "hypctrl/times.hpp"
#include "hypctrl/bmatrix.hpp"
#include "hypctrl/simulator.hpp"
#include "hypctrl/backstepping.hpp"
#include "hypctrl/controller.hpp"
