#pragma once

#include "dmsgcn/errors.hpp"
#include "dmsgcn/rng.hpp"
#include "dmsgcn/tensor.hpp"
#include "dmsgcn/ops.hpp"
#include "dmsgcn/parameter.hpp"
#include "dmsgcn/optim.hpp"
#include "dmsgcn/gradcheck.hpp"
#include "dmsgcn/skeleton.hpp"
#include "dmsgcn/graph.hpp"
#include "dmsgcn/hierarchy_config.hpp"
#include "dmsgcn/layers.hpp"
#include "dmsgcn/model.hpp"
#include "dmsgcn/checkpoint.hpp"
#include "dmsgcn/data.hpp"
#include "dmsgcn/metrics.hpp"
#include "dmsgcn/train.hpp"
#include "dmsgcn/render.hpp"
#include "dmsgcn/gradcheck_suite.hpp"
#include "dmsgcn/commands.hpp"
