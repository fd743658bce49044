#pragma once

#include "roadfix/checkpoint.hpp"
#include "roadfix/dataset.hpp"
#include "roadfix/errors.hpp"
#include "roadfix/evaluate.hpp"
#include "roadfix/experiment.hpp"
#include "roadfix/fallacy.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/losses.hpp"
#include "roadfix/metrics.hpp"
#include "roadfix/model.hpp"
#include "roadfix/nn/memory.hpp"
#include "roadfix/png_codec.hpp"
#include "roadfix/raster.hpp"
#include "roadfix/road_type.hpp"
#include "roadfix/synthetic.hpp"
#include "roadfix/trainer.hpp"
