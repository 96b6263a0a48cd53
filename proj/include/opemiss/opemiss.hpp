#pragma once

#include "opemiss/common.hpp"
#include "opemiss/dataset_io.hpp"
#include "opemiss/dropout_propensity.hpp"
#include "opemiss/env_sim.hpp"
#include "opemiss/experiment.hpp"
#include "opemiss/inference.hpp"
#include "opemiss/optimize.hpp"
#include "opemiss/sieve_basis.hpp"
#include "opemiss/validate.hpp"
#include "opemiss/value_estimators.hpp"
