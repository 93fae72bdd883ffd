#ifndef ISLES_ISLES_HPP
#define ISLES_ISLES_HPP

#include "isles/components.hpp"
#include "isles/error.hpp"
#include "isles/metrics.hpp"
#include "isles/nifti.hpp"
#include "isles/pipeline.hpp"
#include "isles/preprocess.hpp"
#include "isles/skullstrip.hpp"
#include "isles/volume.hpp"

#endif
