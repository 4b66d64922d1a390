#pragma once

#include "solarmlr/error.hpp"
#include "solarmlr/opcount.hpp"
#include "solarmlr/linalg.hpp"
#include "solarmlr/distqr.hpp"
#include "solarmlr/jacobisvd.hpp"
#include "solarmlr/calibrate.hpp"
#include "solarmlr/rng.hpp"
#include "solarmlr/dataio.hpp"
#include "solarmlr/features.hpp"
#include "solarmlr/baselines.hpp"
#include "solarmlr/metrics.hpp"
#include "solarmlr/predictor.hpp"
#include "solarmlr/simnet.hpp"
