"""Independent straight-line reimplementations used as test oracles."""

import numpy as np

IDLE, TRANSMIT, START, BUSY = 0, 1, 2, 3


def single_client_fedbacys(S, kappa, cap, T, n_batches, lr, grad, dim):
    """One client, one group, a charge every slot.

    The client is its own hub, so the last slot of every epoch is its upload
    slot: it pays one unit there whenever it is free and has energy, and its
    pending update (if any) is folded into the model it hands to the server.

    Returns per-slot action codes, end-of-slot batteries and the server model
    after every epoch.
    """
    battery = 0
    busy_until = None
    job_model = None
    pending = None
    model = np.zeros(dim)
    server = np.zeros(dim)
    codes, batteries, servers = [], [], []
    for s in range(S * T):
        upload_slot = s % S == S - 1
        inbox = None
        if busy_until is not None and s < busy_until:
            code = BUSY
        elif upload_slot and battery >= 1:
            code = TRANSMIT
        elif battery >= kappa and pending is None and (s + kappa) % S < S - 1:
            code = START
        else:
            code = IDLE

        if code == TRANSMIT:
            battery -= 1
            inbox, pending = pending, None
        elif code == START:
            battery -= kappa
            busy_until = s + kappa
            job_model = model.copy()

        if busy_until is not None and busy_until == s + 1:
            y = job_model.copy()
            for _ in range(n_batches):
                y = y - lr * grad(y)
            pending = job_model - y
            busy_until = None

        battery = min(battery + 1, cap)

        if upload_slot:
            hub_model = model if inbox is None else model - inbox
            server = hub_model.copy()
            model = server.copy()
            servers.append(server.copy())
        codes.append(code)
        batteries.append(battery)
    return codes, batteries, servers
