"""
Business logic services
One module per concern: task model, data streams, replay, client, server,
checkpoints, orchestration, metrics, configuration and reporting
"""
