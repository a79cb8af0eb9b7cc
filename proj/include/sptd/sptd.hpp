#pragma once

#include "sptd/attribution.hpp"
#include "sptd/concepts.hpp"
#include "sptd/error.hpp"
#include "sptd/frame_filter.hpp"
#include "sptd/image_io.hpp"
#include "sptd/importance.hpp"
#include "sptd/manifest.hpp"
#include "sptd/metrics.hpp"
#include "sptd/model.hpp"
#include "sptd/planted.hpp"
#include "sptd/semi_nmf.hpp"
#include "sptd/tensor.hpp"
#include "sptd/tensor_io.hpp"
