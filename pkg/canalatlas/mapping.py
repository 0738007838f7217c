# SPDX-License-Identifier: GPL-3.0-or-later
__all__ = ['serial_map']


def serial_map(function, arguments):
    """
    Call a function once per argument tuple, in order.

    This is the default mapper of the functions that fan out independent work items. A mapper
    must return the results in argument order.

    :param callable function: the function to call
    :param iterable arguments: the positional argument tuples
    :return: the results in argument order
    :rtype: list
    """
    return [function(*args) for args in arguments]
