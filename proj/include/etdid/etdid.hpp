// Umbrella header.
#pragma once

#include "etdid/effective.hpp"
#include "etdid/errors.hpp"
#include "etdid/estimator.hpp"
#include "etdid/inference.hpp"
#include "etdid/panel.hpp"
#include "etdid/parallel.hpp"
#include "etdid/rng.hpp"
#include "etdid/simulate.hpp"
#include "etdid/version.hpp"
