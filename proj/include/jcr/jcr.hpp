#pragma once

#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"
#include "jcr/alignment.hpp"
#include "jcr/calibration.hpp"
#include "jcr/reconstruction.hpp"
#include "jcr/fields.hpp"
#include "jcr/synth.hpp"
#include "jcr/io.hpp"
#include "jcr/pipeline.hpp"
