#pragma once

#include "dasunet/checkpoint.hpp"
#include "dasunet/cli.hpp"
#include "dasunet/colorspace.hpp"
#include "dasunet/config.hpp"
#include "dasunet/dataset.hpp"
#include "dasunet/loss.hpp"
#include "dasunet/metrics.hpp"
#include "dasunet/network.hpp"
#include "dasunet/oracle.hpp"
#include "dasunet/toy_data.hpp"
#include "dasunet/training.hpp"
#include "dasunet/wavelet.hpp"
