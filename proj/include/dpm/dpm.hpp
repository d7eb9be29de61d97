#pragma once

#include "dpm/config.hpp"
#include "dpm/dpm_net.hpp"
#include "dpm/embedding.hpp"
#include "dpm/error.hpp"
#include "dpm/evaluation.hpp"
#include "dpm/features.hpp"
#include "dpm/image.hpp"
#include "dpm/manifest.hpp"
#include "dpm/matcher.hpp"
#include "dpm/model_store.hpp"
#include "dpm/numerics.hpp"
#include "dpm/pipeline.hpp"
#include "dpm/synth.hpp"
