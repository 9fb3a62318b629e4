#include <math.h>
#include <stdio.h>
#include "anwm.h"

int main(void) {
    AnwmPose p = {1.0, 2.0, 10.0, 0.5};
    AnwmAction a = {5.0, 0.0, 1.0, 0.1};
    AnwmPose q;
    AnwmAction back;
    if (anwm_compose_pose(&p, &a, &q) != ANWM_STATUS_OK) return 1;
    if (anwm_action_between(&p, &q, &back) != ANWM_STATUS_OK) return 2;
    if (fabs(back.dx - 5.0) > 1e-9 || fabs(back.dyaw - 0.1) > 1e-9) return 3;

    AnwmScene *scene = NULL;
    if (anwm_scene_build(3, NULL, &scene) != ANWM_STATUS_OK) return 4;
    AnwmIntrinsics k;
    if (anwm_intrinsics_with_fov(16, 16, 1.5707963267948966, &k) != ANWM_STATUS_OK) return 5;
    AnwmPose view = {0.0, 0.0, 70.0, 0.0};
    AnwmFrame *f = NULL;
    if (anwm_render(scene, &view, &k, &f) != ANWM_STATUS_OK) return 6;
    AnwmImageMetrics m;
    if (anwm_image_metrics(f, f, &m) != ANWM_STATUS_OK) return 7;
    if (m.mse != 0.0 || m.ssim != 1.0) return 8;

    if (anwm_compose_pose(NULL, &a, &q) != ANWM_STATUS_NULL_POINTER) return 9;
    char msg[128];
    size_t n = anwm_last_error(msg, sizeof msg);
    if (n == 0) return 10;

    anwm_frame_free(f);
    anwm_scene_free(scene);
    printf("ok %s\n", anwm_version());
    return 0;
}
