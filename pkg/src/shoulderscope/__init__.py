"""Recovering touched keys from video of someone typing on a touch screen.

The pipeline estimates a frame-to-reference homography from the screen's
edges, tracks fingertip features to find the frames where the finger rests
on the glass, clusters the fingertip's intensity bands to isolate the
touched point, and votes the point cloud into a key guess with a one-key
fallback.  A synthetic scene generator provides exact ground truth, and the
pek module implements randomized-keyboard countermeasures.

Modules: geom (camera and homography algebra), imgproc (PGM I/O, edges,
lines, corners), flow (pyramidal feature tracking), screenfind (screen quad
and DLT homography), tapdetect (touching-frame detection), keyrec (touched
point and key voting), layout (keyboard geometry), synthcam (ground-truth
renderer), pek (countermeasures), cli (command line).
"""

from .errors import PipelineAbort, ShoulderScopeError
from .flow import FeatureTrack, TrackConfig, build_pyramid, lk_step, track_sequence
from .geom import (
    CameraExtrinsics,
    CameraIntrinsics,
    Homography,
    PlaneFrame,
    apply,
    apply_many,
    compose_between_views,
    plane_to_image_homography,
    project_point,
)
from .imgproc import (
    GrayImage,
    PolarLine,
    canny,
    gaussian_blur,
    hough_lines,
    line_intersection,
    load_frame_dir,
    load_pgm,
    save_frame_dir,
    save_pgm,
    shi_tomasi_features,
    sobel_gradients,
)
from .keyrec import (
    KeyGuess,
    RecognitionResult,
    RecognizeConfig,
    kmeans_intensity,
    locate_finger_roi,
    recognize_sequence,
    select_touch_pixels,
    upscale,
    vote_key,
)
from .layout import (
    DEVICE_PRESETS,
    KeyboardLayout,
    KeyRect,
    builtin_layout,
    key_at,
    layout_from_json,
    layout_to_json,
    predicted_key_image_size,
    screen_corners,
)
from .pek import brownian_step, shuffle_layout, simulate_session
from .screenfind import (
    PointPairSet,
    ScreenFindConfig,
    ScreenQuad,
    detect_screen_quad,
    dlt_homography,
    frame_to_reference,
)
from .synthcam import (
    GroundTruth,
    SceneConfig,
    Tap,
    TapScript,
    reference_raster,
    render_finger,
    render_scene,
    scene_preset,
    synth_tap_video,
)
from .tapdetect import (
    TouchReport,
    auto_toward_direction,
    detect_touching_frames,
    signed_velocities,
)

__version__ = "0.1.0"

__all__ = [
    "PipelineAbort",
    "ShoulderScopeError",
    "FeatureTrack",
    "TrackConfig",
    "build_pyramid",
    "lk_step",
    "track_sequence",
    "CameraExtrinsics",
    "CameraIntrinsics",
    "Homography",
    "PlaneFrame",
    "apply",
    "apply_many",
    "compose_between_views",
    "plane_to_image_homography",
    "project_point",
    "GrayImage",
    "PolarLine",
    "canny",
    "gaussian_blur",
    "hough_lines",
    "line_intersection",
    "load_frame_dir",
    "load_pgm",
    "save_frame_dir",
    "save_pgm",
    "shi_tomasi_features",
    "sobel_gradients",
    "KeyGuess",
    "RecognitionResult",
    "RecognizeConfig",
    "kmeans_intensity",
    "locate_finger_roi",
    "recognize_sequence",
    "select_touch_pixels",
    "upscale",
    "vote_key",
    "DEVICE_PRESETS",
    "KeyboardLayout",
    "KeyRect",
    "builtin_layout",
    "key_at",
    "layout_from_json",
    "layout_to_json",
    "predicted_key_image_size",
    "screen_corners",
    "brownian_step",
    "shuffle_layout",
    "simulate_session",
    "PointPairSet",
    "ScreenFindConfig",
    "ScreenQuad",
    "detect_screen_quad",
    "dlt_homography",
    "frame_to_reference",
    "GroundTruth",
    "SceneConfig",
    "Tap",
    "TapScript",
    "reference_raster",
    "render_finger",
    "render_scene",
    "scene_preset",
    "synth_tap_video",
    "TouchReport",
    "auto_toward_direction",
    "detect_touching_frames",
    "signed_velocities",
    "__version__",
]
