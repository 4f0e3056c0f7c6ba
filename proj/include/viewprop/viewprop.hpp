// viewprop/viewprop.hpp
//
// Umbrella include for the whole library.
#pragma once

#include "viewprop/camera.hpp"
#include "viewprop/core.hpp"
#include "viewprop/editing.hpp"
#include "viewprop/geometry.hpp"
#include "viewprop/image.hpp"
#include "viewprop/metrics.hpp"
#include "viewprop/pipeline.hpp"
#include "viewprop/png_io.hpp"
#include "viewprop/propagation.hpp"
#include "viewprop/scene.hpp"
#include "viewprop/subprocess.hpp"
