#pragma once

#include "muvi/baselines.hpp"
#include "muvi/checkpoint.hpp"
#include "muvi/engine.hpp"
#include "muvi/errors.hpp"
#include "muvi/grid.hpp"
#include "muvi/inference.hpp"
#include "muvi/io.hpp"
#include "muvi/layers.hpp"
#include "muvi/losses.hpp"
#include "muvi/metrics.hpp"
#include "muvi/model.hpp"
#include "muvi/optimizer.hpp"
#include "muvi/overlay.hpp"
#include "muvi/parallel.hpp"
#include "muvi/phantom.hpp"
#include "muvi/png.hpp"
#include "muvi/pseudolabel.hpp"
#include "muvi/rng.hpp"
#include "muvi/tensor.hpp"
#include "muvi/train.hpp"
#include "muvi/volume.hpp"
