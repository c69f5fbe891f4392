#pragma once

#include "mp/common.hpp"
#include "mp/dataset.hpp"
#include "mp/image_io.hpp"
#include "mp/keypoints.hpp"
#include "mp/losses.hpp"
#include "mp/metrics.hpp"
#include "mp/motion.hpp"
#include "mp/nets.hpp"
#include "mp/ops.hpp"
#include "mp/pipeline.hpp"
#include "mp/presets.hpp"
#include "mp/synthesis.hpp"
#include "mp/tape.hpp"
#include "mp/tensor.hpp"
#include "mp/tps.hpp"
#include "mp/train.hpp"
#include "mp/weights.hpp"
