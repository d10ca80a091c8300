#pragma once

// Convenience umbrella; individual headers are self-contained and cheaper to
// compile when only a few modules are needed.

#include "pca/augment.hpp"
#include "pca/autodiff.hpp"
#include "pca/backbone.hpp"
#include "pca/checkpoint.hpp"
#include "pca/cwa.hpp"
#include "pca/data.hpp"
#include "pca/explain.hpp"
#include "pca/gradcheck.hpp"
#include "pca/image.hpp"
#include "pca/loss.hpp"
#include "pca/metrics.hpp"
#include "pca/nn.hpp"
#include "pca/ops.hpp"
#include "pca/rng.hpp"
#include "pca/synth.hpp"
#include "pca/tensor.hpp"
#include "pca/threading.hpp"
#include "pca/trainer.hpp"
