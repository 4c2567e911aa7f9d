#pragma once

// Umbrella header for the whole framework.

#include "overlord/ad/graph.hpp"
#include "overlord/ad/nn_ops.hpp"
#include "overlord/ad/ops.hpp"
#include "overlord/core/rng.hpp"
#include "overlord/core/serialize.hpp"
#include "overlord/core/tensor.hpp"
#include "overlord/data/dataset.hpp"
#include "overlord/data/image_io.hpp"
#include "overlord/eval/frechet.hpp"
#include "overlord/eval/harness.hpp"
#include "overlord/eval/pipeline.hpp"
#include "overlord/eval/probes.hpp"
#include "overlord/latent/bank.hpp"
#include "overlord/losses/losses.hpp"
#include "overlord/nets/checkpoint.hpp"
#include "overlord/nets/nets.hpp"
#include "overlord/report/config.hpp"
#include "overlord/report/curves.hpp"
#include "overlord/report/grid.hpp"
#include "overlord/report/report_io.hpp"
#include "overlord/synth/factors.hpp"
#include "overlord/synth/render.hpp"
#include "overlord/train/adam.hpp"
#include "overlord/train/trainer.hpp"
#include "overlord/transform/transforms.hpp"
