#pragma once

#include "usdaf/core/error.hpp"
#include "usdaf/core/ops.hpp"
#include "usdaf/core/optim.hpp"
#include "usdaf/core/random.hpp"
#include "usdaf/core/tensor.hpp"

#include "usdaf/scene/dataset.hpp"
#include "usdaf/scene/label_space.hpp"
#include "usdaf/scene/render.hpp"

#include "usdaf/detect/anchors.hpp"
#include "usdaf/detect/box.hpp"
#include "usdaf/detect/checkpoint.hpp"
#include "usdaf/detect/loss.hpp"
#include "usdaf/detect/model.hpp"

#include "usdaf/adapt/diagnostics.hpp"
#include "usdaf/adapt/heads.hpp"
#include "usdaf/adapt/losses.hpp"
#include "usdaf/adapt/multilabel.hpp"
#include "usdaf/adapt/scale.hpp"

#include "usdaf/eval/ap.hpp"
#include "usdaf/eval/metrics.hpp"
#include "usdaf/eval/report.hpp"

#include "usdaf/harness/batch.hpp"
#include "usdaf/harness/config.hpp"
#include "usdaf/harness/presets.hpp"
#include "usdaf/harness/suite.hpp"
#include "usdaf/harness/train.hpp"
