#pragma once

// Convenience include for the whole library.  Individual headers stay
// usable on their own; pull in just what you need for faster builds.

#include "mvfusion/adam.hpp"
#include "mvfusion/autodiff.hpp"
#include "mvfusion/bounds.hpp"
#include "mvfusion/checkpoint.hpp"
#include "mvfusion/config.hpp"
#include "mvfusion/csvio.hpp"
#include "mvfusion/datakit.hpp"
#include "mvfusion/errors.hpp"
#include "mvfusion/experiment.hpp"
#include "mvfusion/finite_diff.hpp"
#include "mvfusion/mlp.hpp"
#include "mvfusion/model.hpp"
#include "mvfusion/param_store.hpp"
#include "mvfusion/probdist.hpp"
#include "mvfusion/rng.hpp"
#include "mvfusion/selfcheck.hpp"
#include "mvfusion/tensor.hpp"
#include "mvfusion/trainer.hpp"
