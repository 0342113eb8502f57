#pragma once

// Umbrella header: the whole laboratory.

#include "rbsde/errors.hpp"
#include "rbsde/estimates.hpp"
#include "rbsde/fixtures.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/io.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"
#include "rbsde/snell.hpp"
#include "rbsde/solver.hpp"
