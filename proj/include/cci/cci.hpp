#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "common.hpp"
#include "dsp.hpp"
#include "evalx.hpp"
#include "intervene.hpp"
#include "latentviz.hpp"
#include "layers.hpp"
#include "network.hpp"
#include "nst.hpp"
#include "objective.hpp"
#include "pipeline.hpp"
#include "postprocess.hpp"
#include "records.hpp"
#include "train.hpp"
