#pragma once

// Convenience header pulling in the whole library.

#include "reprompt/cohort.hpp"
#include "reprompt/encoders.hpp"
#include "reprompt/errors.hpp"
#include "reprompt/experiment.hpp"
#include "reprompt/frozen_lm.hpp"
#include "reprompt/logistic_oracle.hpp"
#include "reprompt/metrics.hpp"
#include "reprompt/model.hpp"
#include "reprompt/synthesis.hpp"
#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/ops.hpp"
#include "reprompt/numerics/optim.hpp"
#include "reprompt/numerics/serialize.hpp"
#include "reprompt/numerics/tensor.hpp"
