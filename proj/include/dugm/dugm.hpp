#pragma once

// Umbrella header for the whole library.

#include <dugm/adam.hpp>
#include <dugm/checkpoint.hpp>
#include <dugm/cli.hpp>
#include <dugm/data.hpp>
#include <dugm/errors.hpp>
#include <dugm/fusion.hpp>
#include <dugm/interaction.hpp>
#include <dugm/metrics.hpp>
#include <dugm/models.hpp>
#include <dugm/nig.hpp>
#include <dugm/nn.hpp>
#include <dugm/raster.hpp>
#include <dugm/refine.hpp>
#include <dugm/service.hpp>
#include <dugm/special.hpp>
#include <dugm/train.hpp>
#include <dugm/usermap.hpp>
