#pragma once

#include "d2r/tensor.hpp"
#include "d2r/autodiff.hpp"
#include "d2r/gradcheck.hpp"
#include "d2r/losses.hpp"
#include "d2r/model.hpp"
#include "d2r/checkpoint.hpp"
#include "d2r/attacks.hpp"
#include "d2r/data.hpp"
#include "d2r/idx.hpp"
#include "d2r/evaluate.hpp"
#include "d2r/train.hpp"
#include "d2r/metrics.hpp"
#include "d2r/config.hpp"
#include "d2r/gradcheck_suite.hpp"
#include "d2r/cli.hpp"
