#pragma once

#include "ecpr/baselines.hpp"
#include "ecpr/channel.hpp"
#include "ecpr/core.hpp"
#include "ecpr/denoisers.hpp"
#include "ecpr/ec.hpp"
#include "ecpr/experiment.hpp"
#include "ecpr/fft.hpp"
#include "ecpr/io.hpp"
#include "ecpr/linops.hpp"
#include "ecpr/metrics.hpp"
#include "ecpr/protocol.hpp"
