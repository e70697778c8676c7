#pragma once

#include "vlcsim/analytics.hpp"
#include "vlcsim/channel.hpp"
#include "vlcsim/engine.hpp"
#include "vlcsim/error.hpp"
#include "vlcsim/framing.hpp"
#include "vlcsim/harness.hpp"
#include "vlcsim/rng.hpp"
#include "vlcsim/uart.hpp"
