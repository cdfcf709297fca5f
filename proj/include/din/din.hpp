// Umbrella header for the DenseImage network library.
#pragma once

#include "din/analysis.hpp"
#include "din/classifier.hpp"
#include "din/core.hpp"
#include "din/data_io.hpp"
#include "din/dataset.hpp"
#include "din/denseimage.hpp"
#include "din/model.hpp"
#include "din/temporal_conv.hpp"
#include "din/trainer.hpp"
