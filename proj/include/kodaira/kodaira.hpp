#pragma once

#include "kodaira/errors.hpp"
#include "kodaira/exterior.hpp"
#include "kodaira/geometry.hpp"
#include "kodaira/model_kernel.hpp"
#include "kodaira/discrete_operator.hpp"
#include "kodaira/heat_semigroup.hpp"
#include "kodaira/exact_models.hpp"
