#pragma once

#include "modarith/activations.hpp"
#include "modarith/adam.hpp"
#include "modarith/aggregate.hpp"
#include "modarith/analysis.hpp"
#include "modarith/autodiff.hpp"
#include "modarith/checkpoint.hpp"
#include "modarith/circuit_metrics.hpp"
#include "modarith/config.hpp"
#include "modarith/dataset.hpp"
#include "modarith/experiment.hpp"
#include "modarith/freq_cluster.hpp"
#include "modarith/geometry.hpp"
#include "modarith/gradcheck.hpp"
#include "modarith/io.hpp"
#include "modarith/mmd.hpp"
#include "modarith/model.hpp"
#include "modarith/parallel.hpp"
#include "modarith/phase_stats.hpp"
#include "modarith/rng.hpp"
#include "modarith/tda.hpp"
#include "modarith/tensor.hpp"
#include "modarith/train.hpp"
