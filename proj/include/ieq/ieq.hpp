#pragma once

#include "ieq/errors.hpp"
#include "ieq/linalg.hpp"
#include "ieq/quadrature.hpp"
#include "ieq/hamiltonian.hpp"
#include "ieq/integrators.hpp"
#include "ieq/models/fpu.hpp"
#include "ieq/models/string.hpp"
#include "ieq/models/plate.hpp"
#include "ieq/harness/config.hpp"
#include "ieq/harness/experiment.hpp"
