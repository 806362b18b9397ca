"""Session broker: durable op log plus the HTTP/WebSocket service."""
