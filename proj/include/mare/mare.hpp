#pragma once

#include "mare/error.hpp"
#include "mare/grid.hpp"
#include "mare/scenario.hpp"
#include "mare/engine.hpp"
#include "mare/observables.hpp"
#include "mare/protocols.hpp"
#include "mare/config.hpp"
#include "mare/cli.hpp"
