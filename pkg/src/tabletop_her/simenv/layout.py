"""Index constants for the packed simulator arrays shared by both physics backends.

A batch of environments is a ``(N, STATE_DIM)`` float64 array; physics
constants travel as a flat ``(N_PARAMS,)`` vector and static obstacles as a
``(n_static, 6)`` array of axis-aligned boxes ``(xlo, ylo, zlo, xhi, yhi, zhi)``.
"""

# state
S_GRIP = 0  # 3: gripper fingertip centre
S_GRIP_VEL = 3  # 3
S_FINGER = 6  # 2: inner-face offset of each finger from the gripper centre line (+y, -y)
S_FINGER_VEL = 8  # 2
S_BOX = 10  # 3
S_BOX_VEL = 13  # 3
S_BOX_ROT = 16  # 3: Euler angles
S_BOX_ROTVEL = 19  # 3
S_COMPRESSION = 22
S_TARGET = 23  # 3
S_STEP = 26
S_WORK = 27  # cumulative mechanical work done by the gripper on the box
S_WORK_ABS = 28  # cumulative |work| increments, scale for the energy tolerance
S_ENERGY0 = 29  # box energy at reset
STATE_DIM = 30

# params
P_DT_CONTROL = 0
P_NSUB = 1
P_ACTION_SCALE = 2
P_WS_LO = 3  # 3
P_WS_HI = 6  # 3
P_FINGER_MAX = 9
P_FINGER_HW = 10
P_FINGER_T = 11
P_FINGER_L = 12
P_PALM_T = 13
P_BOX_H = 14
P_BOX_M = 15
P_GRAV = 16
P_K = 17
P_C = 18
P_C_SEP = 19
P_MARGIN = 20
P_MU = 21
P_K_GRIP = 22
P_C_GRIP = 23
P_PEN_LIM = 24
P_PEN_LIM_F = 25
P_MU_F = 26
P_MU_TOP = 27
P_K_BOX = 28
P_DELTA_MAX = 29
P_RELEASE_EFF = 30
P_TAN_LAUNCH = 31
P_TWIST_R = 32
P_INERTIA = 33
N_PARAMS = 34

# per-step diagnostics written by the kernel
D_CONTACT = 0  # gripper touched the box during the step
D_GRASPED = 1  # both fingers squeezed opposite faces during the step
D_PRESSED = 2  # the box top was compressed during the step
D_AIRBORNE = 3  # no contact of any kind at the end of the step
D_ENERGY_EXCESS = 4  # max over substeps of (E - E0 - W) / (E0 + W_abs)
D_PENETRATION = 5  # max static interpenetration after the solver, m
D_RELEASED = 6  # stored compression energy was released during the step
N_DIAG = 7
