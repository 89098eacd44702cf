#pragma once

#include "mrcine/calibration.hpp"
#include "mrcine/container.hpp"
#include "mrcine/fft.hpp"
#include "mrcine/linalg.hpp"
#include "mrcine/metrics.hpp"
#include "mrcine/network.hpp"
#include "mrcine/phantom.hpp"
#include "mrcine/recon.hpp"
#include "mrcine/rng.hpp"
#include "mrcine/sampling.hpp"
#include "mrcine/signal_model.hpp"
#include "mrcine/training.hpp"
#include "mrcine/types.hpp"
