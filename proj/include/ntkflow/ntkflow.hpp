#pragma once

#include "ntkflow/activation.hpp"
#include "ntkflow/errors.hpp"
#include "ntkflow/finite_width.hpp"
#include "ntkflow/flow.hpp"
#include "ntkflow/gram.hpp"
#include "ntkflow/kernels.hpp"
#include "ntkflow/lsq.hpp"
#include "ntkflow/pacbayes.hpp"
#include "ntkflow/points.hpp"
#include "ntkflow/quadrature.hpp"
#include "ntkflow/rng.hpp"
